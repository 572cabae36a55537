#pragma once

#include "ddm/errors.hpp"
#include "ddm/lattice.hpp"
#include "ddm/repr.hpp"
#include "ddm/optim.hpp"
#include "ddm/drivers.hpp"
#include "ddm/infconv.hpp"
#include "ddm/deviation.hpp"
#include "ddm/sharing.hpp"
#include "ddm/expression.hpp"
#include "ddm/io.hpp"
