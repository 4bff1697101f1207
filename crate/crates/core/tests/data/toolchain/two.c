int helper(int x) { return x + 1; }
int entry(int x) { return helper(x) * 2; }
