#pragma once

#include "bounds.hpp"
#include "core.hpp"
#include "data.hpp"
#include "eval.hpp"
#include "experiment.hpp"
#include "gradcheck.hpp"
#include "losses.hpp"
#include "model.hpp"
#include "train.hpp"
