// Convenience include: the whole library in one header.
#pragma once

#include "heliocast/core.hpp"
#include "heliocast/time.hpp"
#include "heliocast/series.hpp"
#include "heliocast/stats.hpp"
#include "heliocast/ingest.hpp"
#include "heliocast/solar.hpp"
#include "heliocast/features.hpp"
#include "heliocast/arima.hpp"
#include "heliocast/gbt.hpp"
#include "heliocast/mlp.hpp"
#include "heliocast/model_io.hpp"
#include "heliocast/eval.hpp"
#include "heliocast/synth.hpp"
#include "heliocast/pipeline.hpp"
