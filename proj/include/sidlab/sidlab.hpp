#pragma once

#include "sidlab/checkpoint.hpp"
#include "sidlab/config.hpp"
#include "sidlab/corpus.hpp"
#include "sidlab/distance.hpp"
#include "sidlab/error.hpp"
#include "sidlab/metrics.hpp"
#include "sidlab/model.hpp"
#include "sidlab/report.hpp"
#include "sidlab/rng.hpp"
#include "sidlab/schedule.hpp"
#include "sidlab/text.hpp"
