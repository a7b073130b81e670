#pragma once

#include "bnmf/bound.hpp"
#include "bnmf/core.hpp"
#include "bnmf/errors.hpp"
#include "bnmf/map.hpp"
#include "bnmf/priors.hpp"
#include "bnmf/sampler.hpp"
#include "bnmf/experiment/matrix_io.hpp"
#include "bnmf/experiment/run.hpp"
#include "bnmf/experiment/sweep.hpp"
#include "bnmf/experiment/synthetic.hpp"
