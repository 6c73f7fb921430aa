#pragma once

// Umbrella header for the TFR estimation and projection library.

#include "tfr/common.hpp"
#include "tfr/csv.hpp"
#include "tfr/diagnostics.hpp"
#include "tfr/engine.hpp"
#include "tfr/ingest.hpp"
#include "tfr/linalg.hpp"
#include "tfr/measurement.hpp"
#include "tfr/phase2.hpp"
#include "tfr/phase3.hpp"
#include "tfr/phases.hpp"
#include "tfr/projection.hpp"
#include "tfr/rng.hpp"
#include "tfr/samplers.hpp"
#include "tfr/store.hpp"
#include "tfr/sweep.hpp"
#include "tfr/types.hpp"
