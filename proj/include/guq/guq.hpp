#pragma once

#include "guq/autodiff.hpp"
#include "guq/config.hpp"
#include "guq/dataset.hpp"
#include "guq/errors.hpp"
#include "guq/harness.hpp"
#include "guq/metrics.hpp"
#include "guq/model.hpp"
#include "guq/model_io.hpp"
#include "guq/parallel.hpp"
#include "guq/random.hpp"
#include "guq/report.hpp"
#include "guq/runner.hpp"
#include "guq/scorers.hpp"
#include "guq/tensor.hpp"
#include "guq/training.hpp"
