#pragma once

// umbrella header

#include "anchorcorr/anchors.hpp"
#include "anchorcorr/common.hpp"
#include "anchorcorr/evaluation.hpp"
#include "anchorcorr/gradcheck.hpp"
#include "anchorcorr/image_io.hpp"
#include "anchorcorr/matching.hpp"
#include "anchorcorr/message_passing.hpp"
#include "anchorcorr/network.hpp"
#include "anchorcorr/position_encoding.hpp"
#include "anchorcorr/rng.hpp"
#include "anchorcorr/tensor.hpp"
#include "anchorcorr/training.hpp"
#include "anchorcorr/viz.hpp"
