method M() {
  assert 1 == 2;
}
