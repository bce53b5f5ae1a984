#pragma once

#include "dflim/version.hpp"
#include "dflim/error.hpp"
#include "dflim/linalg.hpp"
#include "dflim/features.hpp"
#include "dflim/calibration.hpp"
#include "dflim/cusum.hpp"
#include "dflim/diagnostics.hpp"
#include "dflim/rng.hpp"
#include "dflim/simulate.hpp"
#include "dflim/harness.hpp"
#include "dflim/mseq.hpp"
#include "dflim/preprocess.hpp"
#include "dflim/serialize.hpp"
#include "dflim/selftest.hpp"
