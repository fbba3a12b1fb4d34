#include <cstdio>

int main() {
    std::puts("ocn: placeholder");
    return 0;
}
