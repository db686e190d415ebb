#pragma once

#include "rccr/core.hpp"
#include "rccr/nn.hpp"
#include "rccr/mixing.hpp"
#include "rccr/models.hpp"
#include "rccr/membank.hpp"
#include "rccr/contrastive.hpp"
#include "rccr/eval.hpp"
#include "rccr/data.hpp"
#include "rccr/config.hpp"
#include "rccr/trainer.hpp"
#include "rccr/checkpoint.hpp"
#include "rccr/reference.hpp"
#include "rccr/selftest.hpp"
