#include "ricci/common.hpp"
int main(){return 0;}
