#pragma once

#include "tslab/common.hpp"
#include "tslab/dataio.hpp"
#include "tslab/harness.hpp"
#include "tslab/metrics.hpp"
#include "tslab/model.hpp"
#include "tslab/optim.hpp"
#include "tslab/ops.hpp"
#include "tslab/report.hpp"
#include "tslab/rng.hpp"
#include "tslab/stats.hpp"
#include "tslab/tensor.hpp"
#include "tslab/trainer.hpp"
#include "tslab/transfer.hpp"
