#pragma once

#include "sale/attention.hpp"
#include "sale/block_grid.hpp"
#include "sale/calibrate.hpp"
#include "sale/mask_io.hpp"
#include "sale/matrix.hpp"
#include "sale/parallel.hpp"
#include "sale/profile_io.hpp"
#include "sale/quant.hpp"
#include "sale/report.hpp"
#include "sale/runner.hpp"
#include "sale/selection.hpp"
#include "sale/sparse_attention.hpp"
#include "sale/tensor_file.hpp"
#include "sale/workloads.hpp"
