method Double(x: int) returns (y: int)
  ensures y == x + x
{
  y := x + 1;
}
