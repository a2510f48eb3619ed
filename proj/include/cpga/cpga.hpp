#pragma once

#include "cpga/cli.hpp"
#include "cpga/common.hpp"
#include "cpga/dataset.hpp"
#include "cpga/geometry.hpp"
#include "cpga/geometry_metrics.hpp"
#include "cpga/image.hpp"
#include "cpga/interpret.hpp"
#include "cpga/marching_cubes.hpp"
#include "cpga/models.hpp"
#include "cpga/nn.hpp"
#include "cpga/optics.hpp"
#include "cpga/runconfig.hpp"
#include "cpga/tensor.hpp"
#include "cpga/training.hpp"
