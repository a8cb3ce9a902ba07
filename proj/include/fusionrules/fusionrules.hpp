#pragma once

#include "errors.hpp"
#include "rule_algebra.hpp"
#include "hyperfit.hpp"
#include "parallel.hpp"
#include "rule_sampler.hpp"
#include "volume.hpp"
#include "components.hpp"
#include "distance_transform.hpp"
#include "combiner.hpp"
#include "metrics.hpp"
#include "dataset.hpp"
#include "discovery.hpp"
#include "volume_io.hpp"
#include "phantom.hpp"
#include "reports.hpp"
