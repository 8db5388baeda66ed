#include "fitprune/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>

namespace fitprune {

std::size_t thread_count() {
    std::size_t requested = 0;
    if (const char* env = std::getenv("FITPRUNE_THREADS")) {
        try {
            requested = std::stoul(env);
        } catch (const std::exception&) {
            requested = 0;
        }
    }
    if (requested == 0)
        requested = std::max(1u, std::thread::hardware_concurrency());
    return requested;
}

}  // namespace fitprune
