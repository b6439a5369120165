#pragma once

// Umbrella header.

#include "sdcnet/analysis.hpp"
#include "sdcnet/batchnorm.hpp"
#include "sdcnet/block.hpp"
#include "sdcnet/cifar.hpp"
#include "sdcnet/conv.hpp"
#include "sdcnet/error.hpp"
#include "sdcnet/gradcheck.hpp"
#include "sdcnet/layers.hpp"
#include "sdcnet/network.hpp"
#include "sdcnet/params.hpp"
#include "sdcnet/rng.hpp"
#include "sdcnet/tensor.hpp"
#include "sdcnet/train.hpp"
