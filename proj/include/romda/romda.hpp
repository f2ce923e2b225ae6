#pragma once

#include "romda/container.hpp"
#include "romda/dataio.hpp"
#include "romda/drivers.hpp"
#include "romda/ekf.hpp"
#include "romda/error.hpp"
#include "romda/features.hpp"
#include "romda/grid.hpp"
#include "romda/harness.hpp"
#include "romda/ident.hpp"
#include "romda/latent.hpp"
#include "romda/obs.hpp"
#include "romda/rng.hpp"
#include "romda/synthtwin.hpp"
#include "romda/timeutil.hpp"
