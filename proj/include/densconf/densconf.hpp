#pragma once

// Umbrella header: distance-based confidence scoring for small MLP
// classifiers, the training regimes that shape their embeddings, and the
// evaluation tasks built on top.

#include "densconf/checkpoint.hpp"
#include "densconf/config.hpp"
#include "densconf/dataset.hpp"
#include "densconf/ensemble.hpp"
#include "densconf/error.hpp"
#include "densconf/evaluation.hpp"
#include "densconf/knn_index.hpp"
#include "densconf/losses.hpp"
#include "densconf/matrix.hpp"
#include "densconf/mlp.hpp"
#include "densconf/rng.hpp"
#include "densconf/scores.hpp"
#include "densconf/train.hpp"
