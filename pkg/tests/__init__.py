# fatcc-sim tests
