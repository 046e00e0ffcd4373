#pragma once

// Umbrella include.

#include "sattn/activations.hpp"
#include "sattn/attention.hpp"
#include "sattn/errors.hpp"
#include "sattn/matrix.hpp"
#include "sattn/pointset.hpp"
#include "sattn/rational.hpp"
#include "sattn/rng.hpp"
#include "sattn/sampling.hpp"
#include "sattn/training.hpp"
#include "sattn/verifier.hpp"
#include "sattn/version.hpp"
