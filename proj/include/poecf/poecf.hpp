#pragma once

#include "poecf/adam.hpp"
#include "poecf/checkpoint.hpp"
#include "poecf/dataset.hpp"
#include "poecf/dataset_io.hpp"
#include "poecf/evaluation.hpp"
#include "poecf/grad_check.hpp"
#include "poecf/matrix.hpp"
#include "poecf/metrics.hpp"
#include "poecf/model.hpp"
#include "poecf/ops.hpp"
#include "poecf/rng.hpp"
#include "poecf/synthgen.hpp"
#include "poecf/training.hpp"
