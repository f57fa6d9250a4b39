#include <cstring>
extern "C" const char* storm_version(void){return "0.0";}
