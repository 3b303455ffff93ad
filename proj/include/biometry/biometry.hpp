#pragma once

// Convenience umbrella: the full landmark-biometry toolkit.

#include "biometry/augment.hpp"
#include "biometry/core.hpp"
#include "biometry/data.hpp"
#include "biometry/dod.hpp"
#include "biometry/errors.hpp"
#include "biometry/experiment.hpp"
#include "biometry/heatmap.hpp"
#include "biometry/image.hpp"
#include "biometry/measure.hpp"
#include "biometry/metrics.hpp"
#include "biometry/model.hpp"
#include "biometry/nn.hpp"
#include "biometry/orientation_io.hpp"
#include "biometry/png_io.hpp"
#include "biometry/svg_plot.hpp"
