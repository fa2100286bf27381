#pragma once

#include "vldp/error.hpp"
#include "vldp/parallel.hpp"
#include "vldp/paths.hpp"
#include "vldp/kernels.hpp"
#include "vldp/fields.hpp"
#include "vldp/volmap.hpp"
#include "vldp/model.hpp"
#include "vldp/optimize.hpp"
#include "vldp/ratefn.hpp"
#include "vldp/pricing.hpp"
#include "vldp/toymodel.hpp"
#include "vldp/mcsim.hpp"
#include "vldp/config.hpp"
