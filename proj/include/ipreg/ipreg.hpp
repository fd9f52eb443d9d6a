#pragma once

#include "ipreg/core.hpp"
#include "ipreg/linops.hpp"
#include "ipreg/geometry.hpp"
#include "ipreg/filters.hpp"
#include "ipreg/nets.hpp"
#include "ipreg/io.hpp"
#include "ipreg/training.hpp"
#include "ipreg/variational.hpp"
#include "ipreg/unrolled.hpp"
#include "ipreg/harness.hpp"
