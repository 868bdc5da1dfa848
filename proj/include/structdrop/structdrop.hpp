#pragma once

#include "structdrop/errors.hpp"
#include "structdrop/matrix.hpp"
#include "structdrop/rng.hpp"
#include "structdrop/svd.hpp"
#include "structdrop/factor_pair.hpp"
#include "structdrop/dropout_schemes.hpp"
#include "structdrop/spectral.hpp"
#include "structdrop/trainer.hpp"
#include "structdrop/experiment.hpp"
