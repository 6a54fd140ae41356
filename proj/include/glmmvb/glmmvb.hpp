#pragma once

#include "glmmvb/block_arrow.hpp"
#include "glmmvb/density.hpp"
#include "glmmvb/dnr.hpp"
#include "glmmvb/errors.hpp"
#include "glmmvb/expfam.hpp"
#include "glmmvb/ffvb.hpp"
#include "glmmvb/glmm.hpp"
#include "glmmvb/io.hpp"
#include "glmmvb/linalg.hpp"
#include "glmmvb/mcmcref.hpp"
#include "glmmvb/mfvb.hpp"
#include "glmmvb/modelsel.hpp"
#include "glmmvb/parallel.hpp"
#include "glmmvb/random.hpp"
#include "glmmvb/simulate.hpp"
