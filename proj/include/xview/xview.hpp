#pragma once

#include "xview/backbone.hpp"
#include "xview/config.hpp"
#include "xview/correlate.hpp"
#include "xview/dataset.hpp"
#include "xview/error.hpp"
#include "xview/eval.hpp"
#include "xview/image_io.hpp"
#include "xview/imageops.hpp"
#include "xview/metric.hpp"
#include "xview/network.hpp"
#include "xview/tensor.hpp"
#include "xview/tensor_file.hpp"
