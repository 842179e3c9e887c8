#pragma once

// Everything in one include.

#include "avq/alignedvq.hpp"
#include "avq/autodiff.hpp"
#include "avq/bench.hpp"
#include "avq/bytes.hpp"
#include "avq/checkpoint.hpp"
#include "avq/codebook.hpp"
#include "avq/config.hpp"
#include "avq/container.hpp"
#include "avq/data.hpp"
#include "avq/encoder.hpp"
#include "avq/error.hpp"
#include "avq/kernels.hpp"
#include "avq/rng.hpp"
#include "avq/split.hpp"
#include "avq/tensor.hpp"
#include "avq/train.hpp"
#include "avq/transport.hpp"
#include "avq/vq.hpp"
#include "avq/wire.hpp"
