#pragma once

#include "istapp/adam.hpp"
#include "istapp/autodiff.hpp"
#include "istapp/checkpoint.hpp"
#include "istapp/error.hpp"
#include "istapp/evaluation.hpp"
#include "istapp/gradcheck.hpp"
#include "istapp/image_io.hpp"
#include "istapp/ista.hpp"
#include "istapp/measurement_io.hpp"
#include "istapp/metrics.hpp"
#include "istapp/net.hpp"
#include "istapp/ops.hpp"
#include "istapp/sampling.hpp"
#include "istapp/serialization.hpp"
#include "istapp/tensor.hpp"
#include "istapp/training.hpp"
