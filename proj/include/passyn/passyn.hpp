#pragma once

#include "passyn/errors.hpp"
#include "passyn/matkit.hpp"
#include "passyn/ssmodel.hpp"
#include "passyn/bilinear.hpp"
#include "passyn/spectral.hpp"
#include "passyn/lmi.hpp"
#include "passyn/certeq.hpp"
#include "passyn/youla.hpp"
#include "passyn/h2obj.hpp"
#include "passyn/sdp.hpp"
#include "passyn/pipeline.hpp"
