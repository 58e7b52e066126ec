#pragma once

#include "streamraid/attack.hpp"
#include "streamraid/config.hpp"
#include "streamraid/datasets.hpp"
#include "streamraid/errors.hpp"
#include "streamraid/experiment.hpp"
#include "streamraid/gradkit.hpp"
#include "streamraid/metrics.hpp"
#include "streamraid/model_io.hpp"
#include "streamraid/models.hpp"
#include "streamraid/report.hpp"
#include "streamraid/rng.hpp"
#include "streamraid/tensor.hpp"
#include "streamraid/trace_io.hpp"
#include "streamraid/training.hpp"
