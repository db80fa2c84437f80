#pragma once

#include "xmodal/analyze.hpp"
#include "xmodal/corpus.hpp"
#include "xmodal/diagnose.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/format.hpp"
#include "xmodal/geometry.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/model.hpp"
#include "xmodal/nn.hpp"
#include "xmodal/report.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/stats.hpp"
#include "xmodal/synth.hpp"
#include "xmodal/train.hpp"
#include "xmodal/version.hpp"
