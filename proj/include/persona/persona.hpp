#pragma once

// Umbrella header.

#include "persona/backend.hpp"
#include "persona/checkpoint.hpp"
#include "persona/clock.hpp"
#include "persona/config.hpp"
#include "persona/error.hpp"
#include "persona/gateway.hpp"
#include "persona/hash.hpp"
#include "persona/http_provider.hpp"
#include "persona/io.hpp"
#include "persona/library.hpp"
#include "persona/linalg.hpp"
#include "persona/parallel.hpp"
#include "persona/pipeline.hpp"
#include "persona/registry.hpp"
#include "persona/remote_backend.hpp"
#include "persona/scoring.hpp"
#include "persona/service.hpp"
#include "persona/session.hpp"
#include "persona/synthetic_backend.hpp"
#include "persona/synthetic_config.hpp"
#include "persona/synthetic_provider.hpp"
#include "persona/wire.hpp"
#include "persona/wire_server.hpp"
