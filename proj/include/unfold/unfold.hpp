#pragma once

#include "unfold/blur_encoder.hpp"
#include "unfold/deblur_net.hpp"
#include "unfold/gradcheck_suite.hpp"
#include "unfold/io/checkpoint.hpp"
#include "unfold/io/flo.hpp"
#include "unfold/io/gif.hpp"
#include "unfold/io/png.hpp"
#include "unfold/losses.hpp"
#include "unfold/metrics.hpp"
#include "unfold/motion_codec.hpp"
#include "unfold/pipeline.hpp"
#include "unfold/synthdata.hpp"
#include "unfold/training.hpp"
