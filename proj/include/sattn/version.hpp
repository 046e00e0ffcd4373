#pragma once

#define SATTN_VERSION_MAJOR 0
#define SATTN_VERSION_MINOR 1
#define SATTN_VERSION_PATCH 0
#define SATTN_VERSION_STRING "0.1.0"
