#pragma once

#include "sksd/active_slices.hpp"
#include "sksd/common.hpp"
#include "sksd/discrepancy.hpp"
#include "sksd/gof.hpp"
#include "sksd/ica.hpp"
#include "sksd/kernel.hpp"
#include "sksd/models.hpp"
#include "sksd/refine.hpp"
#include "sksd/score_field.hpp"
