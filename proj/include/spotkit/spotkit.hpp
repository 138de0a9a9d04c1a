#pragma once

#include "spotkit/binary_io.hpp"
#include "spotkit/checkpoint.hpp"
#include "spotkit/data_synth.hpp"
#include "spotkit/encoders.hpp"
#include "spotkit/errors.hpp"
#include "spotkit/eval.hpp"
#include "spotkit/feature_bank.hpp"
#include "spotkit/geometry.hpp"
#include "spotkit/gradcheck.hpp"
#include "spotkit/gradcheck_suite.hpp"
#include "spotkit/inference.hpp"
#include "spotkit/losses.hpp"
#include "spotkit/pipeline.hpp"
#include "spotkit/rng.hpp"
#include "spotkit/spotting.hpp"
#include "spotkit/tensor.hpp"
