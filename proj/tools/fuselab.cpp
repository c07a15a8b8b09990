#include <cstdio>
int main() { std::puts("fuselab"); return 0; }
