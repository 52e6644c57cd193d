#pragma once

// Everything except the JSON manifest layer (manifest.hpp), which pulls in
// nlohmann::json.

#include "ncrel/bytes.hpp"
#include "ncrel/channel.hpp"
#include "ncrel/codec.hpp"
#include "ncrel/framing.hpp"
#include "ncrel/gf256.hpp"
#include "ncrel/harness.hpp"
#include "ncrel/pipeline.hpp"
#include "ncrel/selftest.hpp"
#include "ncrel/sim.hpp"
#include "ncrel/threaded_pipeline.hpp"
