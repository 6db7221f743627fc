#pragma once

#include "lmrasch/errors.hpp"
#include "lmrasch/numeric.hpp"
#include "lmrasch/model_params.hpp"
#include "lmrasch/param_ref.hpp"
#include "lmrasch/likelihood.hpp"
#include "lmrasch/posterior.hpp"
#include "lmrasch/newton.hpp"
#include "lmrasch/mstep.hpp"
#include "lmrasch/em.hpp"
#include "lmrasch/selection.hpp"
#include "lmrasch/simulator.hpp"
