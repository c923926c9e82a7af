#pragma once

// Umbrella header for the whole library.

#include "ptsfa/datagen.hpp"
#include "ptsfa/dataset_io.hpp"
#include "ptsfa/domainstats.hpp"
#include "ptsfa/errors.hpp"
#include "ptsfa/layers.hpp"
#include "ptsfa/losses.hpp"
#include "ptsfa/matrix.hpp"
#include "ptsfa/model.hpp"
#include "ptsfa/optim.hpp"
#include "ptsfa/oracle.hpp"
#include "ptsfa/pta.hpp"
#include "ptsfa/rng.hpp"
#include "ptsfa/trainer.hpp"
