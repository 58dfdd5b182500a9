#pragma once

// Single include point for cpp-httplib so the OpenSSL switch is identical
// in every translation unit.
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
