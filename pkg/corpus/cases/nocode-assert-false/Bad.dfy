method Bad() {
  assert false;
}
