def inc(a):
    b = a + 1
    return b
