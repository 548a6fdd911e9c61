#pragma once

#include "pseudolab/analytics/metrics.hpp"
#include "pseudolab/analytics/records_io.hpp"
#include "pseudolab/analytics/sweep.hpp"
#include "pseudolab/datagen/augment.hpp"
#include "pseudolab/datagen/dataset.hpp"
#include "pseudolab/datagen/generate.hpp"
#include "pseudolab/error.hpp"
#include "pseudolab/gating/decision_io.hpp"
#include "pseudolab/gating/gate.hpp"
#include "pseudolab/numerics/autodiff.hpp"
#include "pseudolab/numerics/mlp.hpp"
#include "pseudolab/numerics/optim.hpp"
#include "pseudolab/numerics/tensor.hpp"
#include "pseudolab/rng.hpp"
#include "pseudolab/trainer/config.hpp"
#include "pseudolab/trainer/trainer.hpp"
