#ifndef GPOINTX_GPOINTX_HPP_
#define GPOINTX_GPOINTX_HPP_

#include "gpointx/checkpoint.hpp"
#include "gpointx/cloud.hpp"
#include "gpointx/data.hpp"
#include "gpointx/diff.hpp"
#include "gpointx/geom.hpp"
#include "gpointx/group.hpp"
#include "gpointx/harness.hpp"
#include "gpointx/layers.hpp"
#include "gpointx/models.hpp"
#include "gpointx/rng.hpp"

#endif  // GPOINTX_GPOINTX_HPP_
