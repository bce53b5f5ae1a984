#pragma once

#ifndef DFLIM_VERSION
#define DFLIM_VERSION "0.1.0"
#endif
