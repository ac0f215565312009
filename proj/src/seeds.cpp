#include "advkit/seeds.hpp"

#include <cstdlib>
#include <string>
#include <thread>

namespace advkit {

int worker_count() {
    static const int cached = [] {
        if (const char* env = std::getenv("ADVKIT_THREADS")) {
            const int n = std::atoi(env);
            if (n >= 1) return n;
        }
        const unsigned hw = std::thread::hardware_concurrency();
        return hw ? static_cast<int>(hw) : 1;
    }();
    return cached;
}

}  // namespace advkit
