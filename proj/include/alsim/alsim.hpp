#pragma once

#include "alsim/classifier.hpp"
#include "alsim/crowd.hpp"
#include "alsim/curvefit.hpp"
#include "alsim/dataset.hpp"
#include "alsim/frame.hpp"
#include "alsim/harness.hpp"
#include "alsim/rng.hpp"
#include "alsim/selection.hpp"
#include "alsim/synth.hpp"
