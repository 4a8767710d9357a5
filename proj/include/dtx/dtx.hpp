#pragma once

// Umbrella header: the whole library in one include.

#include "dtx/bench.hpp"
#include "dtx/clock.hpp"
#include "dtx/event_log.hpp"
#include "dtx/lock_manager.hpp"
#include "dtx/metrics.hpp"
#include "dtx/oracle.hpp"
#include "dtx/pipeline.hpp"
#include "dtx/retry_queue.hpp"
#include "dtx/store.hpp"
#include "dtx/types.hpp"
#include "dtx/workload.hpp"
