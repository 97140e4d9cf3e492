#pragma once

#include "wednet/adversarial.hpp"
#include "wednet/attention.hpp"
#include "wednet/autodiff.hpp"
#include "wednet/causalaug.hpp"
#include "wednet/config.hpp"
#include "wednet/datamodel.hpp"
#include "wednet/embed.hpp"
#include "wednet/encoders.hpp"
#include "wednet/errors.hpp"
#include "wednet/fusion.hpp"
#include "wednet/ingest.hpp"
#include "wednet/io.hpp"
#include "wednet/memory.hpp"
#include "wednet/model.hpp"
#include "wednet/optim.hpp"
#include "wednet/params.hpp"
#include "wednet/synth.hpp"
#include "wednet/train.hpp"
#include "wednet/viz.hpp"
