#pragma once

#include "vrecover/types.hpp"
#include "vrecover/cpoly.hpp"
#include "vrecover/structmat.hpp"
#include "vrecover/recover_phase.hpp"
#include "vrecover/recover_phaseless.hpp"
#include "vrecover/oracle.hpp"
#include "vrecover/harness.hpp"
