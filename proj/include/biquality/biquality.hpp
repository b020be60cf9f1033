#pragma once

#include "biquality/calibration.hpp"
#include "biquality/core.hpp"
#include "biquality/corruption.hpp"
#include "biquality/data.hpp"
#include "biquality/density_ratio.hpp"
#include "biquality/evalstat.hpp"
#include "biquality/gbt.hpp"
#include "biquality/isotonic.hpp"
#include "biquality/model.hpp"
#include "biquality/reweighting.hpp"
#include "biquality/tree.hpp"
#include "biquality/trusted_ratio.hpp"
#include "biquality/harness.hpp"
#include "biquality/report.hpp"
#include "biquality/svg.hpp"
