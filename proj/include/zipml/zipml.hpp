#pragma once

#include "zipml/error.hpp"
#include "zipml/rng.hpp"
#include "zipml/bitpack.hpp"
#include "zipml/quant.hpp"
#include "zipml/optq.hpp"
#include "zipml/dataset.hpp"
#include "zipml/zipq.hpp"
#include "zipml/linmodel.hpp"
#include "zipml/nonlinear.hpp"
