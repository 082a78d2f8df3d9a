#pragma once

#include "lte/tensor.hpp"
#include "lte/pointcloud.hpp"
#include "lte/neighbors.hpp"
#include "lte/lle.hpp"
#include "lte/embed_net.hpp"
#include "lte/reconstruct.hpp"
#include "lte/losses.hpp"
#include "lte/trainer.hpp"
#include "lte/correspond.hpp"
