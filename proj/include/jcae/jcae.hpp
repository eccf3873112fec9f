#pragma once

#include "jcae/adam.hpp"
#include "jcae/autodiff.hpp"
#include "jcae/common.hpp"
#include "jcae/dataset.hpp"
#include "jcae/fusion.hpp"
#include "jcae/grad_check.hpp"
#include "jcae/image_io.hpp"
#include "jcae/kernels.hpp"
#include "jcae/loss.hpp"
#include "jcae/metrics.hpp"
#include "jcae/model.hpp"
#include "jcae/pipeline.hpp"
#include "jcae/tensor.hpp"
#include "jcae/train.hpp"
#include "jcae/weights_io.hpp"
