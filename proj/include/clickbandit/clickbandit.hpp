#pragma once

#include "clickbandit/common.hpp"
#include "clickbandit/logmodel.hpp"
#include "clickbandit/featurize.hpp"
#include "clickbandit/ranksvm.hpp"
#include "clickbandit/topics.hpp"
#include "clickbandit/bandit.hpp"
#include "clickbandit/hsmm.hpp"
#include "clickbandit/synthgen.hpp"
#include "clickbandit/replay.hpp"
#include "clickbandit/report.hpp"
